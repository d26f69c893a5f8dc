# Generated by Django 5.1.6 on 2026-10-18 09:12

from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='RunManifest',
            fields=[
                ('id', models.AutoField(primary_key=True, serialize=False)),
                ('subcommand', models.CharField(max_length=25)),
                ('seed', models.BigIntegerField(blank=True, null=True)),
                ('artifact_version', models.CharField(max_length=25)),
                ('config_echo', models.JSONField(default=dict)),
                ('output_files', models.JSONField(default=list)),
                ('timings', models.JSONField(default=dict)),
                ('exit_code', models.IntegerField(default=0)),
                ('created', models.DateTimeField(auto_now_add=True)),
            ],
            options={
                'ordering': ['-created'],
            },
        ),
    ]
